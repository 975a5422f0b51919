#include "mcn/unet.hpp"

#include <cmath>

namespace mcn {

namespace {

const char* kBlockNames[] = {"enc1", "enc2", "enc3", "enc4", "mid",
                             "dec1", "dec2", "dec3", "dec4", "embed", "head"};

Tensor he_conv(int cout, int cin, int k, Rng rng, DType dt) {
    Tensor w = Tensor::randn({cout, cin, k, k}, rng, dt);
    double s = std::sqrt(2.0 / (static_cast<double>(cin) * k * k));
    for (int64_t i = 0; i < w.numel(); ++i) w.set(i, w.get(i) * s);
    return w;
}

Tensor he_linear(int dout, int din, Rng rng, DType dt) {
    Tensor w = Tensor::randn({dout, din}, rng, dt);
    double s = std::sqrt(2.0 / static_cast<double>(din));
    for (int64_t i = 0; i < w.numel(); ++i) w.set(i, w.get(i) * s);
    return w;
}

void add_block_params(ParamSet& p, const std::string& name, int cin, int cout, int temb_dim,
                      const Rng& root, DType dt) {
    p.insert(name + ".conv1.w", he_conv(cout, cin, 3, root.fork(name + ".conv1.w"), dt));
    p.insert(name + ".conv1.b", Tensor::zeros({cout}, dt));
    p.insert(name + ".temb.w", he_linear(cout, temb_dim, root.fork(name + ".temb.w"), dt));
    p.insert(name + ".temb.b", Tensor::zeros({cout}, dt));
    p.insert(name + ".norm1.g", Tensor::full({cout}, 1.0, dt));
    p.insert(name + ".norm1.b", Tensor::zeros({cout}, dt));
    p.insert(name + ".conv2.w", he_conv(cout, cout, 3, root.fork(name + ".conv2.w"), dt));
    p.insert(name + ".conv2.b", Tensor::zeros({cout}, dt));
    p.insert(name + ".norm2.g", Tensor::full({cout}, 1.0, dt));
    p.insert(name + ".norm2.b", Tensor::zeros({cout}, dt));
}

// conv1 -> +temb -> norm -> silu -> conv2 -> norm -> silu
Tensor run_block(const ParamSet& p, const std::string& name, const Tensor& x,
                 const Tensor& silu_temb) {
    Tensor h = conv2d(x, p.at(name + ".conv1.w"), p.at(name + ".conv1.b"), 1, 1);
    Tensor proj = linear(silu_temb, p.at(name + ".temb.w"), p.at(name + ".temb.b"));
    h = add_channel_vec(h, proj);
    h = channel_norm(h, p.at(name + ".norm1.g"), p.at(name + ".norm1.b"));
    h = silu(h);
    h = conv2d(h, p.at(name + ".conv2.w"), p.at(name + ".conv2.b"), 1, 1);
    h = channel_norm(h, p.at(name + ".norm2.g"), p.at(name + ".norm2.b"));
    return silu(h);
}

Tensor sinusoidal_embedding(const std::vector<int>& t, int dim, DType dt) {
    const int n = static_cast<int>(t.size());
    const int half = dim / 2;
    Tensor out = Tensor::zeros({n, dim}, dt);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < half; ++j) {
            double freq = std::exp(-std::log(10000.0) * j / std::max(1, half - 1));
            double arg = static_cast<double>(t[static_cast<size_t>(i)]) * freq;
            out.set(static_cast<int64_t>(i) * dim + j, std::sin(arg));
            out.set(static_cast<int64_t>(i) * dim + half + j, std::cos(arg));
        }
    }
    return out;
}

}  // namespace

void UNetConfig::validate() const {
    if (image_size <= 0 || image_size % 16 != 0)
        throw ShapeError("unet: image size must be divisible by 16, got " +
                         std::to_string(image_size));
    if (base_channels < 1) throw ShapeError("unet: base channels must be >= 1");
    if (time_embed_dim < 2 || time_embed_dim % 2 != 0)
        throw ShapeError("unet: time embed dim must be even and >= 2");
    for (int m : channel_mult)
        if (m < 1) throw ShapeError("unet: channel multipliers must be >= 1");
    if (class_count < 0) throw ShapeError("unet: class count must be >= 0");
}

ParamSet build_unet_params(const UNetConfig& cfg, uint64_t seed, const std::string& prefix,
                           DType dt) {
    cfg.validate();
    Rng root = Rng(seed).fork("unet-init");
    ParamSet p;
    const int d = cfg.time_embed_dim;
    p.insert(prefix + "embed.time.fc1.w", he_linear(d, d, root.fork(prefix + "fc1"), dt));
    p.insert(prefix + "embed.time.fc1.b", Tensor::zeros({d}, dt));
    p.insert(prefix + "embed.time.fc2.w", he_linear(d, d, root.fork(prefix + "fc2"), dt));
    p.insert(prefix + "embed.time.fc2.b", Tensor::zeros({d}, dt));
    if (cfg.class_count > 0) {
        Rng cls_rng = root.fork(prefix + "cls");
        Tensor table = Tensor::randn({cfg.class_count, d}, cls_rng, dt);
        for (int64_t i = 0; i < table.numel(); ++i) table.set(i, table.get(i) * 0.02);
        p.insert(prefix + "embed.cls.table", table);
    }

    const int c1 = cfg.channels(0), c2 = cfg.channels(1), c3 = cfg.channels(2), c4 = cfg.channels(3);
    add_block_params(p, prefix + "enc1", 1, c1, d, root, dt);
    add_block_params(p, prefix + "enc2", c1, c2, d, root, dt);
    add_block_params(p, prefix + "enc3", c2, c3, d, root, dt);
    add_block_params(p, prefix + "enc4", c3, c4, d, root, dt);
    add_block_params(p, prefix + "mid", c4, c4, d, root, dt);
    add_block_params(p, prefix + "dec4", c4 + c4, c3, d, root, dt);
    add_block_params(p, prefix + "dec3", c3 + c3, c2, d, root, dt);
    add_block_params(p, prefix + "dec2", c2 + c2, c1, d, root, dt);
    add_block_params(p, prefix + "dec1", c1 + c1, c1, d, root, dt);
    p.insert(prefix + "head.conv.w", he_conv(1, c1, 3, root.fork(prefix + "head"), dt));
    p.insert(prefix + "head.conv.b", Tensor::zeros({1}, dt));
    return p;
}

Tensor unet_time_embedding(const UNetConfig& cfg, const ParamSet& params,
                           const std::string& prefix, const std::vector<int>& t,
                           const std::vector<int>* class_ids, DType dt) {
    Tensor emb = sinusoidal_embedding(t, cfg.time_embed_dim, dt);
    Tensor h = linear(emb, params.at(prefix + "embed.time.fc1.w"),
                      params.at(prefix + "embed.time.fc1.b"));
    h = silu(h);
    h = linear(h, params.at(prefix + "embed.time.fc2.w"), params.at(prefix + "embed.time.fc2.b"));
    if (class_ids) {
        if (cfg.class_count <= 0)
            throw ShapeError("unet: class ids given but model built without class conditioning");
        if (class_ids->size() != t.size())
            throw ShapeError("unet: class id count != batch size");
        h = add(h, embedding(params.at(prefix + "embed.cls.table"), *class_ids));
    }
    return h;
}

EncoderOut unet_encode(const UNetConfig& cfg, const ParamSet& params, const std::string& prefix,
                       const Tensor& x, const Tensor& temb) {
    if (x.ndim() != 4 || x.dim(1) != 1 || x.dim(2) != cfg.image_size || x.dim(3) != cfg.image_size)
        throw ShapeError("unet: input must be [N,1," + std::to_string(cfg.image_size) + "," +
                         std::to_string(cfg.image_size) + "]");
    Tensor st = silu(temb);
    EncoderOut out;
    Tensor h = run_block(params, prefix + "enc1", x, st);
    out.skips[0] = h;
    h = run_block(params, prefix + "enc2", avgpool2x(h), st);
    out.skips[1] = h;
    h = run_block(params, prefix + "enc3", avgpool2x(h), st);
    out.skips[2] = h;
    h = run_block(params, prefix + "enc4", avgpool2x(h), st);
    out.skips[3] = h;
    out.mid = run_block(params, prefix + "mid", h, st);
    return out;
}

Tensor unet_decode(const UNetConfig& cfg, const ParamSet& params, const std::string& prefix,
                   const EncoderOut& enc, const Tensor& temb) {
    (void)cfg;
    Tensor st = silu(temb);
    Tensor h = run_block(params, prefix + "dec4", concat_channel(enc.mid, enc.skips[3]), st);
    h = run_block(params, prefix + "dec3", concat_channel(upsample2x_nearest(h), enc.skips[2]), st);
    h = run_block(params, prefix + "dec2", concat_channel(upsample2x_nearest(h), enc.skips[1]), st);
    h = run_block(params, prefix + "dec1", concat_channel(upsample2x_nearest(h), enc.skips[0]), st);
    return conv2d(h, params.at(prefix + "head.conv.w"), params.at(prefix + "head.conv.b"), 1, 1);
}

Tensor unet_forward(const UNetConfig& cfg, const ParamSet& params, const std::string& prefix,
                    const Tensor& x, const std::vector<int>& t,
                    const std::vector<int>* class_ids) {
    if (static_cast<int>(t.size()) != x.dim(0))
        throw ShapeError("unet: timestep count " + std::to_string(t.size()) + " != batch " +
                         std::to_string(x.dim(0)));
    Tensor temb = unet_time_embedding(cfg, params, prefix, t, class_ids, x.dtype());
    EncoderOut enc = unet_encode(cfg, params, prefix, x, temb);
    return unet_decode(cfg, params, prefix, enc, temb);
}

BaseUNet build_base_unet(const UNetConfig& cfg, uint64_t seed) {
    return BaseUNet{cfg, build_unet_params(cfg, seed, "base.")};
}

std::string block_of(const std::string& path) {
    size_t p0 = path.find('.');
    if (p0 == std::string::npos) throw ShapeError("block_of: unknown path '" + path + "'");
    std::string family = path.substr(0, p0);
    if (family != "base" && family != "ctrl")
        throw ShapeError("block_of: unknown path '" + path + "' (family '" + family + "')");
    size_t p1 = path.find('.', p0 + 1);
    std::string block = path.substr(p0 + 1, (p1 == std::string::npos ? path.size() : p1) - p0 - 1);
    for (const char* name : kBlockNames)
        if (block == name) return block;
    throw ShapeError("block_of: unknown path '" + path + "' (block '" + block + "')");
}

std::map<std::string, std::vector<std::string>> named_blocks(const ParamSet& params) {
    std::map<std::string, std::vector<std::string>> out;
    for (const auto& [path, t] : params) out[block_of(path)].push_back(path);
    return out;
}

}  // namespace mcn
