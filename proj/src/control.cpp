#include "mcn/control.hpp"

#include <cmath>

namespace mcn {

namespace {

const char* kClonedBlocks[] = {"enc1", "enc2", "enc3", "enc4", "mid"};
const char* kZcNames[] = {"zc.enc1", "zc.enc2", "zc.enc3", "zc.enc4", "zc.mid"};

Tensor scaled_randn_conv(int cout, int cin, int k, Rng rng, DType dt, double gain) {
    Tensor w = Tensor::randn({cout, cin, k, k}, rng, dt);
    double s = gain * std::sqrt(2.0 / (static_cast<double>(cin) * k * k));
    for (int64_t i = 0; i < w.numel(); ++i) w.set(i, w.get(i) * s);
    return w;
}

Tensor hint_forward(const ParamSet& theta, const Tensor& control) {
    Tensor h = conv2d(control, theta.at("hint.conv1.w"), theta.at("hint.conv1.b"), 1, 1);
    h = silu(h);
    h = conv2d(h, theta.at("hint.conv2.w"), theta.at("hint.conv2.b"), 1, 1);
    h = silu(h);
    return conv2d(h, theta.at("hint.conv3.w"), theta.at("hint.conv3.b"), 1, 1);
}

}  // namespace

FreezePolicy freeze_policy_from_string(const std::string& s) {
    if (s == "none") return FreezePolicy::None;
    if (s == "enc4mid") return FreezePolicy::Enc4Mid;
    if (s == "enc2to4mid") return FreezePolicy::Enc2to4Mid;
    if (s == "enc1to3") return FreezePolicy::Enc1to3;
    throw ConfigError("unknown freeze policy '" + s +
                      "' (expected none|enc4mid|enc2to4mid|enc1to3)");
}

std::string to_string(FreezePolicy p) {
    switch (p) {
        case FreezePolicy::None: return "none";
        case FreezePolicy::Enc4Mid: return "enc4mid";
        case FreezePolicy::Enc2to4Mid: return "enc2to4mid";
        case FreezePolicy::Enc1to3: return "enc1to3";
    }
    return "?";
}

FreezeMask freeze_mask_for(FreezePolicy p) {
    FreezeMask m;
    switch (p) {
        case FreezePolicy::None:
            break;
        case FreezePolicy::Enc4Mid:
            m.add_prefix("ctrl.enc4");
            m.add_prefix("ctrl.mid");
            break;
        case FreezePolicy::Enc2to4Mid:
            m.add_prefix("ctrl.enc2");
            m.add_prefix("ctrl.enc3");
            m.add_prefix("ctrl.enc4");
            m.add_prefix("ctrl.mid");
            break;
        case FreezePolicy::Enc1to3:
            m.add_prefix("ctrl.enc1");
            m.add_prefix("ctrl.enc2");
            m.add_prefix("ctrl.enc3");
            break;
    }
    return m;
}

ControlModel attach_control_branch(const ParamSet& base, const UNetConfig& cfg, uint64_t seed) {
    cfg.validate();
    // Reject bases that were not built from this config.
    ParamSet expected = build_unet_params(cfg, 0, "base.", DType::F32);
    if (base.size() != expected.size())
        throw ShapeError("attach: base has " + std::to_string(base.size()) +
                         " tensors, config expects " + std::to_string(expected.size()));
    for (const auto& [path, t] : expected) {
        if (!base.contains(path)) throw ShapeError("attach: base missing '" + path + "'");
        if (base.at(path).shape() != t.shape())
            throw ShapeError("attach: shape mismatch at '" + path + "' between base and config");
    }

    ControlModel m;
    m.cfg = cfg;
    m.base = base;
    m.base.set_requires_grad(false);

    // Bitwise clone of encoder + middle under the ctrl prefix.
    for (const char* block : kClonedBlocks) {
        ParamSet sub = base.subset_with_prefix("base." + std::string(block) + ".");
        for (const auto& [path, t] : sub)
            m.theta.insert("ctrl" + path.substr(4), t.clone());
    }

    const DType dt = base.at("base.enc1.conv1.w").dtype();
    for (int k = 0; k < 4; ++k) {
        int c = cfg.channels(k);
        m.theta.insert(std::string(kZcNames[k]) + ".w", Tensor::zeros({c, c, 1, 1}, dt));
        m.theta.insert(std::string(kZcNames[k]) + ".b", Tensor::zeros({c}, dt));
    }
    int c4 = cfg.channels(3);
    m.theta.insert("zc.mid.w", Tensor::zeros({c4, c4, 1, 1}, dt));
    m.theta.insert("zc.mid.b", Tensor::zeros({c4}, dt));

    // Hint encoder: control image -> enc1 input space, small-random init so
    // the branch has signal to differentiate once the zero links open up.
    Rng root = Rng(seed).fork("hint-init");
    int c1 = cfg.channels(0);
    m.theta.insert("hint.conv1.w", scaled_randn_conv(c1, 1, 3, root.fork("c1"), dt, 1.0));
    m.theta.insert("hint.conv1.b", Tensor::zeros({c1}, dt));
    m.theta.insert("hint.conv2.w", scaled_randn_conv(c1, c1, 3, root.fork("c2"), dt, 1.0));
    m.theta.insert("hint.conv2.b", Tensor::zeros({c1}, dt));
    m.theta.insert("hint.conv3.w", scaled_randn_conv(1, c1, 3, root.fork("c3"), dt, 0.1));
    m.theta.insert("hint.conv3.b", Tensor::zeros({1}, dt));
    return m;
}

ControlModel set_connection_policy(const ControlModel& model,
                                   const std::set<int>& disconnected_decs) {
    ControlModel out = model;
    for (int k : disconnected_decs) {
        if (k < 1 || k > 4)
            throw ShapeError("connection policy: decoder block index " + std::to_string(k) +
                             " outside 1..4");
        out.links.enc_link[static_cast<size_t>(k - 1)] = false;
    }
    if (out.links.active_count() == 0)
        throw ShapeError("connection policy: disconnecting every link leaves a degenerate model");
    return out;
}

Tensor ControlModel::forward_with(const ParamSet& theta_eval, const Tensor& x,
                                  const std::vector<int>& t, const Tensor* control,
                                  const std::vector<int>* class_ids) const {
    if (!control) throw ShapeError("control model: control image required");
    if (control->shape() != x.shape())
        throw ShapeError("control model: control shape must match x_t shape");
    if (links.active_count() == 0)
        throw ShapeError("control model: no active links (degenerate)");
    Tensor temb = unet_time_embedding(cfg, base, "base.", t, class_ids, x.dtype());
    EncoderOut base_enc = unet_encode(cfg, base, "base.", x, temb);

    Tensor hint = hint_forward(theta_eval, *control);
    EncoderOut ctrl_enc = unet_encode(cfg, theta_eval, "ctrl.", add(x, hint), temb);

    EncoderOut linked = base_enc;
    for (int k = 0; k < 4; ++k) {
        if (!links.enc_link[static_cast<size_t>(k)]) continue;
        Tensor z = conv2d(ctrl_enc.skips[static_cast<size_t>(k)],
                          theta_eval.at(std::string(kZcNames[k]) + ".w"),
                          theta_eval.at(std::string(kZcNames[k]) + ".b"), 1, 0);
        linked.skips[static_cast<size_t>(k)] = add(base_enc.skips[static_cast<size_t>(k)], z);
    }
    if (links.mid_link) {
        Tensor z = conv2d(ctrl_enc.mid, theta_eval.at("zc.mid.w"), theta_eval.at("zc.mid.b"), 1, 0);
        linked.mid = add(base_enc.mid, z);
    }
    return unet_decode(cfg, base, "base.", linked, temb);
}

ModelFn control_model_fn(const ControlModel& model, const ParamSet& theta) {
    // Copies share tensor storage, so the closure stays valid on its own.
    ControlModel m = model;
    ParamSet th = theta;
    return [m, th](const Tensor& x, const std::vector<int>& t, const Tensor* control,
                   const std::vector<int>* cls) { return m.forward_with(th, x, t, control, cls); };
}

ModelFn base_model_fn(const UNetConfig& cfg, const ParamSet& base_params) {
    ParamSet p = base_params;
    UNetConfig c = cfg;
    return [c, p](const Tensor& x, const std::vector<int>& t, const Tensor* control,
                  const std::vector<int>* cls) {
        (void)control;  // unconditional path ignores the control image
        return unet_forward(c, p, "base.", x, t, cls);
    };
}

}  // namespace mcn
